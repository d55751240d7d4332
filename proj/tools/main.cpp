#include "commands.hpp"

int main(int argc, char** argv) { return potrl::cli::run_cli(argc, argv); }
