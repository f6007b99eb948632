#include "doctest.h"

TEST_SUITE_BEGIN("encoder");
TEST_SUITE_END();
