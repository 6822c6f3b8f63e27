#include "ctsearch/cli.hpp"

int main(int argc, char** argv) { return ctsearch::cli::run_command(argc, argv); }
