#include "mfqe/cli.hpp"

int main(int argc, char** argv) { return mfqe::cli::run(argc, argv); }
