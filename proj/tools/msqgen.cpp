#include <cstdio>

int main() {
    std::puts("msqgen: placeholder");
    return 0;
}
