#include "commands.h"

int main(int argc, char** argv) { return ivfrank::cli::run(argc, argv); }
