#include "wcte/cli.hpp"

int main(int argc, char** argv) { return wcte::cli::run(argc, argv); }
