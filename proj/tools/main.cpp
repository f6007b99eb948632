#include "veto/cli.hpp"

int main(int argc, char** argv) { return veto::cli_main(argc, argv); }
