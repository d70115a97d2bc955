#include "tvload/cli.hpp"

int main(int argc, char** argv) { return tvload::cli::run_cli(argc, argv); }
