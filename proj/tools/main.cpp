#include "ddsde/cli.hpp"

int main(int argc, char** argv) { return ddsde::run_cli(argc, argv); }
