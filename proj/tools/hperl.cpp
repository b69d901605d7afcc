#include "hperl/cli.hpp"

int main(int argc, char** argv) { return hperl::run_cli(argc, argv); }
