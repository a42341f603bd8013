#include "cli.hpp"

int main(int argc, char **argv) { return arealrisk::cli::run(argc, argv); }
