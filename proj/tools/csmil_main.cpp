#include "csmil/cli.hpp"

int main(int argc, char** argv) { return csmil::cli::run_cli(argc, argv); }
