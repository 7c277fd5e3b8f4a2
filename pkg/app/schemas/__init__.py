# package marker for app.schemas
