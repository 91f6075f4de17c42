#include "panodapt/cli.hpp"

int main(int argc, char** argv) { return panodapt::cli::run(argc, argv); }
