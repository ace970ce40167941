#include "cli.hpp"

int main(int argc, char** argv) { return semuq::cli::run(argc, argv); }
