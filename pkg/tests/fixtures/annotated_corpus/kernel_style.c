#include <linux/kernel.h>

#define DRIVER_NAME "demo"

static inline u32 reg_read(void __iomem *base, u32 offset)
{
    return readl(base + offset);
}

static void __attribute__((cold))
report_failure(const char *reason)
{
    pr_err("%s: failed: %s\n", DRIVER_NAME, reason);
}

static int demo_probe(struct platform_device *pdev)
{
    struct resource *res;
    res = platform_get_resource(pdev, IORESOURCE_MEM, 0);
    if (!res) {
        return -ENODEV;
    }
    return 0;
}

static int demo_remove(struct platform_device *pdev)
{
    return 0;
}

int demo_ioctl(struct file *filp,
               unsigned int cmd,
               unsigned long arg)
{
    switch (cmd) {
    case 0: {
        return 0;
    }
    default:
        break;
    }
    return (int)arg;
}

static u64 wide_mul(u32 a, u32 b)
{
    return (u64)a * b;
}
