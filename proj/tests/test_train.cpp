#include "doctest.h"

TEST_SUITE_BEGIN("train");
TEST_SUITE_END();
