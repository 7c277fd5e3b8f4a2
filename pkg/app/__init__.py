# package marker for app
