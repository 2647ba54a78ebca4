#include "milkit/cli.hpp"

int main(int argc, char** argv) { return milkit::cli::run(argc, argv); }
