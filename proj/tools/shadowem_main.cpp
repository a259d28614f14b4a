#include "shadowem/cli.hpp"

int main(int argc, char** argv) { return shadowem::cli::run(argc, argv); }
