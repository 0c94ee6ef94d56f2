//! Holds the `acceptance` test target, which checks the solver end to end
//! on seeded instances and prints one verdict per criterion.
