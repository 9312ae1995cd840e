#include "llfuse/cli.hpp"

int main(int argc, char** argv) { return llfuse::cli::run(argc, argv); }
