#include "doctest.h"

TEST_SUITE_BEGIN("patches");
TEST_SUITE_END();
