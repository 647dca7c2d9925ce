#include "cli_app.hpp"

int main(int argc, char** argv) { return bifseg::cli::run_cli(argc, argv); }
