#include <functional>
#include <memory>
#include <utility>
#include <vector>

static int fibonacci(int n) {
    int prev = 0;
    int curr = 1;
    for (int step = 0; step < n; ++step) {
        int nextValue = prev + curr;
        prev = curr;
        curr = nextValue;
    }
    return prev;
}

int gcd(int lhs, int rhs) {
    while (rhs != 0) {
        int remainder = lhs % rhs;
        lhs = rhs;
        rhs = remainder;
    }
    return lhs;
}

void applyAll(std::vector<int> &vals, const std::function<int(int)> &fn) {
    for (auto &v : vals) v = fn(v);
}

int countIf(const std::vector<int> &xs, int threshold) {
    auto above = [threshold](int x) { return x > threshold; };
    int hits = 0;
    for (int x : xs) {
        if (above(x)) ++hits;
    }
    return hits;
}

std::pair<int, int> minMax(const std::vector<int> &series) {
    int lowest = series.front();
    int highest = series.front();
    for (int s : series) {
        if (s < lowest) lowest = s;
        if (s > highest) highest = s;
    }
    return {lowest, highest};
}

std::unique_ptr<int[]> makeBuffer(size_t capacity) {
    auto buf = std::make_unique<int[]>(capacity);
    for (size_t slot = 0; slot < capacity; ++slot) buf[slot] = 0;
    return buf;
}

int parseDigits(const char *str) {
    int acc = 0;
    while (*str >= '0' && *str <= '9') {
        acc = acc * 10 + (*str - '0');
        ++str;
    }
    return acc;
}

double average(const double *samples, int sampleCount) {
    if (sampleCount == 0) return 0.0;
    double sum = 0.0;
    for (int i = 0; i < sampleCount; ++i) sum += samples[i];
    return sum / sampleCount;
}

bool tryDivide(int numerator, int denominator, int *quotient) {
    if (denominator == 0) return false;
    if (int q = numerator / denominator; quotient != nullptr) {
        *quotient = q;
    }
    return true;
}

int sumPairs(const std::vector<std::pair<int, int>> &pairs) {
    int total = 0;
    for (const auto &[first, second] : pairs) {
        total += first * second;
    }
    return total;
}

void noLocals() {
    helper();
}
