# Este archivo puede estar vacío, solo se necesita para que Python reconozca el directorio como un módulo
