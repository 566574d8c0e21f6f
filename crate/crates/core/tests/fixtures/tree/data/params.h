#define NMAX 64
