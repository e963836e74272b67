#include "bsnet/cli.hpp"

int main(int argc, char** argv) { return bsnet::run_cli(argc, argv); }
