#include "mostdsa/cli.hpp"

int main(int argc, char** argv) { return mostdsa::cli::run(argc, argv); }
