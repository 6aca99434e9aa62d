#include "laybench/app.hpp"

int main(int argc, char** argv) { return laybench::app::run(argc, argv); }
