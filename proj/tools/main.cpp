#include "layerprune/cli.hpp"

int main(int argc, char** argv) { return layerprune::cli::run({argv + 1, argv + argc}); }
