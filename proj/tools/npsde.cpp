#include "cli_app.hpp"

int main(int argc, char** argv) { return npsde::cli::run_cli(argc, argv); }
