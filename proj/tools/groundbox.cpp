#include "groundbox/cli.hpp"

int main(int argc, char** argv) { return groundbox::cli::run(argc, argv); }
