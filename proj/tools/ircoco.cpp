#include "ircoco/cli.hpp"

int main(int argc, char** argv) { return ircoco::run_command(argc, argv); }
