#include "fmmrec/common.hpp"

int main() { return 0; }
