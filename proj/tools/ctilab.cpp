#include "ctilab/cli.hpp"

int main(int argc, char** argv) { return ctilab::run_cli(argc, argv); }
