#include "cst/cli.hpp"

int main(int argc, char** argv) { return cst::cli_main(argc, argv); }
