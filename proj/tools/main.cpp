#include "twinkit/cli.hpp"

int main(int argc, char** argv) { return twinkit::run_cli(argc, argv); }
