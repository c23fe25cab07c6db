#include <stdlib.h>

struct point {
    int x;
    int y;
};

typedef int (*binop_fn)(int, int);

int apply_binop(binop_fn fn, int a, int b)
{
    return fn(a, b);
}

extern int external_decl(int a, int b);

static int squared(int v) { return v * v; }

int array_sum(const int *vals, int count)
{
    int total = 0;
    for (int i = 0; i < count; i++) {
        total += vals[i];
    }
    return total;
}

static struct point make_point(int x, int y)
{
    struct point p = { x, y };
    return p;
}

int (*pick_op(int which))(int, int);

unsigned count_bits(unsigned v)
{
    unsigned c = 0;
    while (v) {
        v &= v - 1;
        c++;
    }
    return c;
}

void take_struct(struct point p, struct point q) { (void)p; (void)q; }
