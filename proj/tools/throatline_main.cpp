#include "throatline/cli.hpp"

int main(int argc, char** argv) { return throatline::cli_dispatch(argc, argv); }
