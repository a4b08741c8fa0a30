int oops( {{ ;; @@
int fine(int a) { return a; }
