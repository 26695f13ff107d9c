#include "hss/cli.hpp"

int main(int argc, char** argv) { return hss::cli::run(argc, argv); }
