#include "raner/cli.hpp"

int main(int argc, char** argv) { return raner::run_cli(argc, argv); }
