# ISO Simulator Test Suite
