#include "mmfv/cli.hpp"

int main(int argc, char** argv) { return mmfv::cli::run(argc, argv); }
