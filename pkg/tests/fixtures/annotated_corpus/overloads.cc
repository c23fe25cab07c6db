#include <cstring>

int parse(const char *s) {
  return (int)strlen(s);
}

int parse(const char *s, int base) {
  (void)base;
  return (int)strlen(s);
}

namespace detail {

bool validate(const char *buf, unsigned len) {
  return buf != 0 && len > 0;
}

bool validate(const char *buf) {
  return validate(buf, 1);
}

}  // namespace detail

class Codec {
 public:
  explicit Codec(int level) : level_(level) {}

  int encode(const char *in, char *out, int cap);
  int level() const { return level_; }

 private:
  int level_;
};

int Codec::encode(const char *in, char *out, int cap) {
  if (cap <= 0) {
    return 0;
  }
  std::memcpy(out, in, (size_t)cap);
  return cap;
}

static double lerp(double a, double b, double t) {
  return a + t * (b - a);
}

static double clamp01(double t) {
  return t < 0.0 ? 0.0 : (t > 1.0 ? 1.0 : t);
}

long checked_add(long a, long b) {
  long r = a + b;
  return r;
}

unsigned short low_word(unsigned v) { return (unsigned short)(v & 0xffffu); }

float half(float x) { return x * 0.5f; }

int identity(int v) { return v; }

int zero(void) { return 0; }
