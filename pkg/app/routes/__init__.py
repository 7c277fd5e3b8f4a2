# package marker for app.routes
