#include "mosaic_sr/cli.hpp"

int main(int argc, char** argv) { return msr::cli::main(argc, argv); }
