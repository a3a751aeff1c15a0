#include "samic/cli.hpp"

int main(int argc, char** argv) { return samic::run_cli(argc, argv); }
