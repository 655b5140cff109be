#include "cli.h"

int main(int argc, char** argv) { return fpgs::cli::run(argc, argv); }
