#include "mtlk/cli.hpp"

int main(int argc, char** argv) { return mtlk::cli::run_cli(argc, argv); }
