#include "cli.hpp"

int main(int argc, char** argv) { return r2diff::cli_main(argc, argv); }
