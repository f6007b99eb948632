#include "doctest.h"

TEST_SUITE_BEGIN("meet");
TEST_SUITE_END();
