#include "proxycot/cli.hpp"

int main(int argc, char** argv) { return proxycot::cli::run_cli(argc, argv); }
