#include "ocp/cli.hpp"

int main(int argc, char** argv) { return ocp::cli::run(argc, argv); }
