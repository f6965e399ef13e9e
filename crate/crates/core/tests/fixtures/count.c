int func(int n)
{
    int count = 1;
    if (n > 0) {
        for (int i = 1; i <= n; i++) {
            count *= 2;
        }
    }
    return count;
}
