#include "cli.hpp"

int main(int argc, char** argv) { return wxs::cli::dispatch(argc, argv); }
