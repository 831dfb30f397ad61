# root package
