#include "wavecap/cli.hpp"

int main(int argc, char** argv) { return wavecap::cli::main(argc, argv); }
