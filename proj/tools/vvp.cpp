#include "vvp/cli.hpp"

int main(int argc, char** argv) { return vvp::cli::run_cli(argc, argv); }
