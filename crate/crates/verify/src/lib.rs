//! Holds the `acceptance` test target, which runs after every other
//! workspace test so its failures never hide theirs.
