#include "snowpac/cli.hpp"

int main(int argc, char** argv) { return snowpac::cli::cli_main(argc, argv); }
