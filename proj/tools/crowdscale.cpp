#include "crowdscale/cli.hpp"

int main(int argc, char** argv) { return crowdscale::cli::run_cli(argc, argv); }
