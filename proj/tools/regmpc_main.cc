#include <iostream>

#include "regmpc/cli.h"

int main(int argc, char** argv) {
  return regmpc::RunCli(argc, argv, std::cout, std::cerr);
}
